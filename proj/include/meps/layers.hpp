#pragma once

#include "meps/layers/feast.hpp"
#include "meps/layers/linear.hpp"
#include "meps/layers/meta.hpp"
