#pragma once

#include "flowda/error.hpp"
#include "flowda/random.hpp"
#include "flowda/grid.hpp"
#include "flowda/dynamics.hpp"
#include "flowda/observations.hpp"
#include "flowda/setconv.hpp"
#include "flowda/network.hpp"
#include "flowda/flow.hpp"
#include "flowda/optim.hpp"
#include "flowda/train.hpp"
#include "flowda/baselines.hpp"
#include "flowda/config.hpp"
#include "flowda/io.hpp"
#include "flowda/harness.hpp"
