#pragma once

#include "pnode/autodiff.hpp"
#include "pnode/constraint.hpp"
#include "pnode/dataset.hpp"
#include "pnode/error.hpp"
#include "pnode/experiment.hpp"
#include "pnode/io.hpp"
#include "pnode/metrics.hpp"
#include "pnode/model.hpp"
#include "pnode/numeric.hpp"
#include "pnode/odeint.hpp"
#include "pnode/projection.hpp"
#include "pnode/systems.hpp"
#include "pnode/training.hpp"
