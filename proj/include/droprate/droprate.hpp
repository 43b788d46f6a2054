// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "droprate/error.hpp"
#include "droprate/rng.hpp"
#include "droprate/tensor.hpp"
#include "droprate/params.hpp"
#include "droprate/dropout.hpp"
#include "droprate/autograd.hpp"
#include "droprate/gradcheck.hpp"
#include "droprate/schedule.hpp"
#include "droprate/model.hpp"
#include "droprate/data.hpp"
#include "droprate/optim.hpp"
#include "droprate/config.hpp"
#include "droprate/checkpoint.hpp"
#include "droprate/trainer.hpp"
#include "droprate/report.hpp"
#include "droprate/commands.hpp"
