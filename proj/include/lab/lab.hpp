#pragma once

#include "lab/analytic_data.hpp"
#include "lab/atom_cloud.hpp"
#include "lab/experiments.hpp"
#include "lab/fitting.hpp"
#include "lab/forward.hpp"
#include "lab/ode.hpp"
#include "lab/operators_bounds.hpp"
#include "lab/parallel.hpp"
#include "lab/quadrature.hpp"
#include "lab/report.hpp"
#include "lab/rng.hpp"
#include "lab/samplers.hpp"
#include "lab/score_field.hpp"
#include "lab/smallvec.hpp"
#include "lab/svg.hpp"
#include "lab/tv_metrics.hpp"
