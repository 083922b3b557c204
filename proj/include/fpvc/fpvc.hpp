#pragma once

#include "fpvc/bspline.hpp"
#include "fpvc/comparators.hpp"
#include "fpvc/data.hpp"
#include "fpvc/error.hpp"
#include "fpvc/fpca.hpp"
#include "fpvc/log.hpp"
#include "fpvc/mixed_model.hpp"
#include "fpvc/mixture.hpp"
#include "fpvc/nuisance.hpp"
#include "fpvc/parallel.hpp"
#include "fpvc/scan.hpp"
#include "fpvc/scores.hpp"
#include "fpvc/sim.hpp"
#include "fpvc/smoothing.hpp"
#include "fpvc/text.hpp"
#include "fpvc/vc_test.hpp"
