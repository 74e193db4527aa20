#pragma once

#include "multipoet/clustering.hpp"
#include "multipoet/csv.hpp"
#include "multipoet/errors.hpp"
#include "multipoet/estimators.hpp"
#include "multipoet/linalg.hpp"
#include "multipoet/panel.hpp"
#include "multipoet/parallel.hpp"
#include "multipoet/pipeline.hpp"
#include "multipoet/portfolio.hpp"
#include "multipoet/rng.hpp"
#include "multipoet/selection.hpp"
#include "multipoet/simulation.hpp"
