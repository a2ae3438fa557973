#pragma once

#include "kmle/core.hpp"
#include "kmle/engine.hpp"
#include "kmle/errors.hpp"
#include "kmle/expfam.hpp"
#include "kmle/io.hpp"
#include "kmle/kvars.hpp"
#include "kmle/metrics.hpp"
#include "kmle/model_select.hpp"
#include "kmle/synth.hpp"
