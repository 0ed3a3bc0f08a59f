#pragma once

#include "meps/model/config.hpp"
#include "meps/model/dataset.hpp"
#include "meps/model/network.hpp"
#include "meps/model/train.hpp"
