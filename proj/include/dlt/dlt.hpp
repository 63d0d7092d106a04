#pragma once

#include "dlt/config.hpp"
#include "dlt/data.hpp"
#include "dlt/error.hpp"
#include "dlt/inference.hpp"
#include "dlt/learning.hpp"
#include "dlt/logmath.hpp"
#include "dlt/oracle.hpp"
#include "dlt/parameters.hpp"
#include "dlt/rng.hpp"
#include "dlt/sampling.hpp"
#include "dlt/selftest.hpp"
#include "dlt/topology.hpp"
