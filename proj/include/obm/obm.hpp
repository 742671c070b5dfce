#pragma once

#include "obm/engine.hpp"
#include "obm/estimator.hpp"
#include "obm/experiments.hpp"
#include "obm/fluid_balance.hpp"
#include "obm/fluid_myopic.hpp"
#include "obm/io.hpp"
#include "obm/model.hpp"
#include "obm/numerics.hpp"
#include "obm/policies.hpp"
#include "obm/rng.hpp"
#include "obm/transport.hpp"
