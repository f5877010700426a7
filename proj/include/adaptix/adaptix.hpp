#pragma once

#include "adaptix/asymptotics.hpp"
#include "adaptix/core.hpp"
#include "adaptix/error.hpp"
#include "adaptix/montecarlo.hpp"
#include "adaptix/noise.hpp"
#include "adaptix/problems.hpp"
#include "adaptix/rng.hpp"
#include "adaptix/schedules.hpp"
#include "adaptix/validate.hpp"
#include "adaptix/validation.hpp"
