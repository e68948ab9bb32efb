#pragma once

#include "mfglab/core.hpp"
#include "mfglab/normal.hpp"
#include "mfglab/rng.hpp"
#include "mfglab/parallel.hpp"
#include "mfglab/models.hpp"
#include "mfglab/dynamics.hpp"
#include "mfglab/metrics.hpp"
#include "mfglab/concentration.hpp"
#include "mfglab/ldp.hpp"
