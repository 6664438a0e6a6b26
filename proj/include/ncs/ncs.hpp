#pragma once

#include "ncs/augmented.hpp"
#include "ncs/chain.hpp"
#include "ncs/error.hpp"
#include "ncs/finite_horizon.hpp"
#include "ncs/io.hpp"
#include "ncs/model.hpp"
#include "ncs/recursion.hpp"
#include "ncs/reductions.hpp"
#include "ncs/simulator.hpp"
#include "ncs/stationary.hpp"
#include "ncs/report.hpp"
#include "ncs/verify.hpp"
