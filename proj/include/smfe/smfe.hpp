#pragma once

#include "smfe/coefficients.hpp"
#include "smfe/config.hpp"
#include "smfe/core.hpp"
#include "smfe/diagnostics.hpp"
#include "smfe/dynamics.hpp"
#include "smfe/fields.hpp"
#include "smfe/fluctuations.hpp"
#include "smfe/harness.hpp"
#include "smfe/io.hpp"
#include "smfe/measure.hpp"
#include "smfe/stats.hpp"
#include "smfe/test_functions.hpp"
#include "smfe/wasserstein.hpp"
