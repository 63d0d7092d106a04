// Command-line front end: stats, selftest, train, eval-nll, inpaint,
// sample, visualize-parts, corrupt.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure (including a failed selftest).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dlt/dlt.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int exit_code_for(dlt::ErrorCode code) {
  using dlt::ErrorCode;
  switch (code) {
    case ErrorCode::BadConfig:
    case ErrorCode::GeometryMismatch:
    case ErrorCode::InvalidLayerOrState:
      return kExitUsage;
    case ErrorCode::NonFiniteScore:
    case ErrorCode::DivergedToNonFinite:
    case ErrorCode::AllZeroPosterior:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

struct Dataset {
  dlt::Extent extent;
  std::vector<dlt::StateGrid> states;
};

Dataset load_dataset(const std::string& path, const dlt::ModelTopology& topo, std::size_t limit) {
  dlt::ImageSet images = dlt::load_idx(path);
  if (limit) images = dlt::slice(images, 0, limit);
  if (images.extent() != topo.layer(0).extent) {
    throw dlt::Error(dlt::ErrorCode::ExtentMismatch, path + ": images are " + dlt::format_extent(images.extent()) +
                                                         ", model input is " + dlt::format_extent(topo.layer(0).extent));
  }
  if (images.count == 0) throw dlt::Error(dlt::ErrorCode::EmptyDataset, path + " holds no images");
  return {images.extent(), dlt::quantize(images, topo.states(0))};
}

struct Observations {
  std::vector<dlt::ObservationGrid> grids;
  std::vector<dlt::CorruptionMask> masks;  // empty when uncorrupted
};

/// Masks come from a CSV when given, else from the corruption seed, else
/// the images stay fully observed.
Observations observe(const Dataset& data, const std::string& mask_file, std::optional<std::uint64_t> corrupt_seed,
                     std::size_t patch) {
  Observations out;
  if (!mask_file.empty()) {
    out.masks = dlt::masks_from_csv(dlt::read_file(mask_file));
    if (out.masks.size() < data.states.size()) {
      throw dlt::Error(dlt::ErrorCode::ShapeMismatch, mask_file + " has fewer masks than images");
    }
    out.masks.resize(data.states.size());
    for (std::size_t i = 0; i < data.states.size(); ++i)
      out.grids.push_back(dlt::apply_mask(data.states[i], data.extent, out.masks[i]));
  } else if (corrupt_seed) {
    dlt::Rng rng = dlt::make_rng(*corrupt_seed, dlt::Stream::Corrupt);
    std::tie(out.grids, out.masks) = dlt::corrupt(data.states, data.extent, rng, patch);
  } else {
    for (const auto& s : data.states) out.grids.push_back({data.extent, s});
  }
  return out;
}

dlt::Checkpoint load_checkpoint(const std::string& path) { return dlt::decode_checkpoint(dlt::read_file(path)); }

void write_checkpoint(const std::string& path, const dlt::ModelTopology& topo, const dlt::Parameters& params) {
  dlt::write_file(path, dlt::encode_checkpoint({dlt::ModelSpec::from(topo), params}));
}

std::string padded(std::size_t i, int width = 4) {
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << i;
  return os.str();
}

void print_stats(const dlt::ModelTopology& topo, std::ostream& os) {
  os << "L = " << topo.num_layers() << "\n";
  for (std::size_t l = 0; l < topo.num_layers(); ++l) {
    os << "layer " << l + 1 << ": extent " << dlt::format_extent(topo.layer(l).extent) << ", T^" << l + 1 << " = "
       << topo.positions(l) << ", F^" << l + 1 << " = " << topo.states(l) << ", nodes = " << topo.layer_nodes(l);
    if (l + 1 < topo.num_layers()) {
      os << ", kernel " << dlt::format_extent(topo.kernel(l).size) << " stride "
         << dlt::format_extent(topo.kernel(l).stride);
    }
    os << "\n";
  }
  os << "T = " << topo.total_positions() << "\n";
  os << "D = " << topo.total_nodes() << "\n";
  os << "parameters = " << dlt::count_parameters(topo) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense latent trees: exact likelihood, training and in-painting"};
  app.require_subcommand(1);
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "Worker threads for training and evaluation")->check(CLI::PositiveNumber);

  // stats
  auto* stats = app.add_subcommand("stats", "Print layer sizes, unique messages T, nodes D and parameter count");
  std::string stats_config;
  stats->add_option("--config", stats_config, "Model config (defaults to the 28x28 reference model)");

  // selftest
  auto* selftest = app.add_subcommand("selftest", "Run the oracle agreement suite");
  std::uint64_t selftest_seed = 7;
  selftest->add_option("--seed", selftest_seed);

  // train
  auto* train = app.add_subcommand("train", "Fit scores by stochastic gradient ascent");
  std::string train_config, train_data, train_out;
  std::optional<std::size_t> train_epochs, train_limit;
  train->add_option("--config", train_config, "Run config")->required();
  train->add_option("--data", train_data, "IDX training images (overrides data.train)");
  train->add_option("--out", train_out, "Output directory (overrides output.dir)");
  train->add_option("--epochs", train_epochs, "Override train.epochs");
  train->add_option("--limit", train_limit, "Use only the first N images");

  // eval-nll
  auto* eval = app.add_subcommand("eval-nll", "Mean negative log-likelihood per image (nats)");
  std::string eval_ckpt, eval_data, eval_masks, eval_csv;
  std::optional<std::uint64_t> eval_corrupt_seed;
  std::size_t eval_limit = 0, eval_patch = 12;
  eval->add_option("--ckpt", eval_ckpt)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--limit", eval_limit, "Use only the first N images");
  eval->add_option("--masks", eval_masks, "Mask CSV from `corrupt`");
  eval->add_option("--corrupt-seed", eval_corrupt_seed, "Remove a random patch per image with this seed");
  eval->add_option("--patch", eval_patch);
  eval->add_option("--csv", eval_csv, "Per-image NLL CSV (image_index,nll)");

  // inpaint
  auto* inpaint = app.add_subcommand("inpaint", "Fill missing patches with one conditional sample");
  std::string inpaint_ckpt, inpaint_data, inpaint_dir, inpaint_masks;
  std::uint64_t inpaint_seed = 3, inpaint_corrupt_seed = 2;
  std::size_t inpaint_limit = 0, inpaint_patch = 12, inpaint_save = 16;
  inpaint->add_option("--ckpt", inpaint_ckpt)->required();
  inpaint->add_option("--data", inpaint_data)->required();
  inpaint->add_option("--out-dir", inpaint_dir)->required();
  inpaint->add_option("--seed", inpaint_seed, "Sampling seed");
  inpaint->add_option("--masks", inpaint_masks, "Mask CSV from `corrupt`");
  inpaint->add_option("--corrupt-seed", inpaint_corrupt_seed, "Patch placement seed when no mask file is given");
  inpaint->add_option("--patch", inpaint_patch);
  inpaint->add_option("--limit", inpaint_limit, "Use only the first N images");
  inpaint->add_option("--save", inpaint_save, "Write PGMs for the first N images");

  // sample
  auto* sample = app.add_subcommand("sample", "Unconditional samples");
  std::string sample_ckpt, sample_dir;
  std::size_t sample_n = 16;
  std::uint64_t sample_seed = 3;
  sample->add_option("--ckpt", sample_ckpt)->required();
  sample->add_option("-n", sample_n);
  sample->add_option("--seed", sample_seed);
  sample->add_option("--out-dir", sample_dir)->required();

  // visualize-parts
  auto* parts = app.add_subcommand("visualize-parts", "Render every state of one layer as an image");
  std::string parts_ckpt, parts_dir;
  std::size_t parts_layer = 3;
  std::uint64_t parts_seed = 3;
  parts->add_option("--ckpt", parts_ckpt)->required();
  parts->add_option("--layer", parts_layer, "Layer (2..L, 1 = pixels)")->required();
  parts->add_option("--out-dir", parts_dir)->required();
  parts->add_option("--seed", parts_seed);

  // corrupt
  auto* corrupt = app.add_subcommand("corrupt", "Draw one random patch per image and write the mask CSV");
  std::string corrupt_data, corrupt_out;
  std::uint64_t corrupt_seed = 2;
  std::size_t corrupt_patch = 12, corrupt_limit = 0;
  corrupt->add_option("--data", corrupt_data)->required();
  corrupt->add_option("--out", corrupt_out)->required();
  corrupt->add_option("--seed", corrupt_seed);
  corrupt->add_option("--patch", corrupt_patch);
  corrupt->add_option("--limit", corrupt_limit);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*stats) {
      dlt::RunConfig cfg;
      if (!stats_config.empty()) cfg = dlt::parse_config(dlt::read_file(stats_config));
      print_stats(cfg.model.build(), std::cout);
      return 0;
    }

    if (*selftest) {
      bool all = true;
      for (const auto& r : dlt::selftest::run_selftest(selftest_seed)) {
        std::cout << (r.passed ? "PASS  " : "FAIL  ") << r.name;
        if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
        std::cout << "\n";
        all = all && r.passed;
      }
      return all ? 0 : kExitNumeric;
    }

    if (*train) {
      dlt::RunConfig cfg = dlt::parse_config(dlt::read_file(train_config));
      if (!train_data.empty()) cfg.train_data = train_data;
      if (!train_out.empty()) cfg.output_dir = train_out;
      if (train_epochs) cfg.train.epochs = *train_epochs;
      if (train_limit) cfg.train_limit = *train_limit;
      if (cfg.train_data.empty()) throw dlt::Error(dlt::ErrorCode::BadConfig, "no training data (data.train or --data)");
      cfg.train.threads = threads;
      const dlt::ModelTopology topo = cfg.model.build();
      const Dataset data = load_dataset(cfg.train_data, topo, cfg.train_limit);
      const Observations obs =
          observe(data, "", cfg.corruption.enabled ? std::optional(cfg.corruption.seed) : std::nullopt, cfg.corruption.patch);

      fs::create_directories(cfg.output_dir);
      const fs::path dir(cfg.output_dir);
      dlt::write_file((dir / "config.cfg").string(), dlt::format_config(cfg));
      std::ofstream trace((dir / "trace.csv").string());
      trace << "epoch,mean_nll,wall_seconds\n";

      dlt::Rng init_rng = dlt::make_rng(cfg.train.seed, dlt::Stream::Init);
      dlt::Parameters params = dlt::Parameters::random(topo, init_rng, cfg.init_scale);
      std::cerr << "training on " << obs.grids.size() << " images, " << dlt::count_parameters(topo) << " parameters\n";
      auto on_epoch = [&](const dlt::EpochStats& s, const dlt::Parameters& p) {
        trace << s.epoch << ',' << std::setprecision(17) << s.mean_nll << ',' << s.wall_seconds << '\n' << std::flush;
        std::cerr << "epoch " << s.epoch << "  mean NLL " << std::setprecision(8) << s.mean_nll << " nats  ("
                  << std::setprecision(4) << s.wall_seconds << " s)\n";
        if (cfg.checkpoint_every && s.epoch % cfg.checkpoint_every == 0) {
          write_checkpoint((dir / ("checkpoint-epoch" + padded(s.epoch) + ".dlt")).string(), topo, p);
        }
      };
      const auto result = dlt::sga_fit(std::move(params), topo, obs.grids, cfg.train, on_epoch);
      write_checkpoint((dir / "final.dlt").string(), topo, result.params);
      std::cout << "wrote " << (dir / "final.dlt").string() << "\n";
      return 0;
    }

    if (*eval) {
      const auto ckpt = load_checkpoint(eval_ckpt);
      const dlt::ModelTopology topo = ckpt.model.build();
      const Dataset data = load_dataset(eval_data, topo, eval_limit);
      const Observations obs = observe(data, eval_masks, eval_corrupt_seed, eval_patch);
      std::vector<double> per_image;
      const double nll = dlt::mean_nll(dlt::weights_from_scores(ckpt.params, topo), topo, obs.grids, &per_image);
      std::cout << "images = " << obs.grids.size() << "\n";
      std::cout << "mean NLL (nats/image) = " << std::setprecision(10) << nll << "\n";
      if (!eval_csv.empty()) {
        std::ostringstream csv;
        csv << "image_index,nll\n" << std::setprecision(17);
        for (std::size_t i = 0; i < per_image.size(); ++i) csv << i << ',' << per_image[i] << '\n';
        dlt::write_file(eval_csv, csv.str());
      }
      return 0;
    }

    if (*inpaint) {
      const auto ckpt = load_checkpoint(inpaint_ckpt);
      const dlt::ModelTopology topo = ckpt.model.build();
      const dlt::Weights w = dlt::weights_from_scores(ckpt.params, topo);
      const Dataset data = load_dataset(inpaint_data, topo, inpaint_limit);
      const Observations obs = observe(data, inpaint_masks, inpaint_corrupt_seed, inpaint_patch);
      fs::create_directories(inpaint_dir);
      const fs::path dir(inpaint_dir);
      std::vector<dlt::StateGrid> completed(obs.grids.size());
      for (std::size_t i = 0; i < obs.grids.size(); ++i) {
        dlt::Rng rng = dlt::make_rng(inpaint_seed, dlt::Stream::Sample, i);
        const dlt::Image img = dlt::inpaint(w, topo, obs.grids[i], rng, &completed[i]);
        if (i < inpaint_save) {
          const std::size_t levels = topo.states(0);
          dlt::write_file((dir / ("truth_" + padded(i) + ".pgm")).string(),
                          dlt::write_pgm(dlt::states_to_image(data.states[i], data.extent, levels)));
          dlt::Image observed = dlt::states_to_image(data.states[i], data.extent, levels);
          for (std::size_t t = 0; t < observed.pixels.size(); ++t)
            if (!obs.grids[i].observed(t)) observed.pixels[t] = 0.5;
          dlt::write_file((dir / ("observed_" + padded(i) + ".pgm")).string(), dlt::write_pgm(observed));
          dlt::write_file((dir / ("inpainted_" + padded(i) + ".pgm")).string(), dlt::write_pgm(img));
        }
      }
      std::vector<double> per_image;
      const double mse = dlt::mse_missing(data.states, completed, obs.masks, data.extent, topo.states(0), &per_image);
      std::ostringstream csv;
      csv << "image_index,patch_row,patch_col,mse\n" << std::setprecision(17);
      for (std::size_t i = 0; i < per_image.size(); ++i) {
        csv << i << ',' << obs.masks[i].row << ',' << obs.masks[i].col << ',' << per_image[i] << '\n';
      }
      dlt::write_file((dir / "metrics.csv").string(), csv.str());
      std::cout << "images = " << completed.size() << "\n";
      std::cout << "MSE (missing pixels, pooled) = " << std::setprecision(6) << mse << "\n";
      return 0;
    }

    if (*sample) {
      const auto ckpt = load_checkpoint(sample_ckpt);
      const dlt::ModelTopology topo = ckpt.model.build();
      const dlt::Weights w = dlt::weights_from_scores(ckpt.params, topo);
      fs::create_directories(sample_dir);
      const fs::path dir(sample_dir);
      const auto empty = dlt::ObservationGrid::all_missing(topo.layer(0).extent);
      dlt::MessageGrid msgs = dlt::init_leaf_messages(empty, topo);
      dlt::forward_pass(w, topo, msgs);
      std::vector<dlt::Image> tiles;
      for (std::size_t i = 0; i < sample_n; ++i) {
        dlt::Rng rng = dlt::make_rng(sample_seed, dlt::Stream::Sample, i);
        const dlt::SampleGrid z = dlt::sample_from_messages(w, topo, msgs, rng);
        tiles.push_back(dlt::states_to_image(z.states[0], topo.layer(0).extent, topo.states(0)));
        dlt::write_file((dir / ("sample_" + padded(i) + ".pgm")).string(), dlt::write_pgm(tiles.back()));
      }
      dlt::write_file((dir / "samples.pgm").string(), dlt::write_pgm(dlt::tile_images(tiles, 8)));
      std::cout << "wrote " << sample_n << " samples to " << sample_dir << "\n";
      return 0;
    }

    if (*parts) {
      const auto ckpt = load_checkpoint(parts_ckpt);
      const dlt::ModelTopology topo = ckpt.model.build();
      const dlt::Weights w = dlt::weights_from_scores(ckpt.params, topo);
      if (parts_layer < 2 || parts_layer > topo.num_layers()) {
        throw dlt::Error(dlt::ErrorCode::InvalidLayerOrState, "--layer must be in 2.." + std::to_string(topo.num_layers()));
      }
      const std::size_t layer = parts_layer - 1;
      fs::create_directories(parts_dir);
      const fs::path dir(parts_dir);
      std::vector<dlt::Image> tiles;
      for (std::size_t f = 0; f < topo.states(layer); ++f) {
        dlt::Rng rng = dlt::make_rng(parts_seed, dlt::Stream::Sample, f);
        tiles.push_back(dlt::visualize_state(w, topo, layer, f, rng));
        dlt::write_file((dir / ("layer" + std::to_string(parts_layer) + "_state_" + padded(f) + ".pgm")).string(),
                        dlt::write_pgm(tiles.back()));
      }
      const auto columns = static_cast<std::size_t>(std::ceil(std::sqrt(double(tiles.size()))));
      dlt::write_file((dir / ("layer" + std::to_string(parts_layer) + "_sheet.pgm")).string(),
                      dlt::write_pgm(dlt::tile_images(tiles, columns)));
      std::cout << "wrote " << tiles.size() << " part images of " << tiles.front().height << "x" << tiles.front().width
                << " to " << parts_dir << "\n";
      return 0;
    }

    if (*corrupt) {
      dlt::ImageSet images = dlt::load_idx(corrupt_data);
      if (corrupt_limit) images = dlt::slice(images, 0, corrupt_limit);
      dlt::Rng rng = dlt::make_rng(corrupt_seed, dlt::Stream::Corrupt);
      const auto grids = dlt::quantize(images, 2);
      const auto [observed, masks] = dlt::corrupt(grids, images.extent(), rng, corrupt_patch);
      dlt::write_file(corrupt_out, dlt::masks_to_csv(masks));
      std::cout << "wrote " << masks.size() << " masks to " << corrupt_out << "\n";
      return 0;
    }
  } catch (const dlt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
