#pragma once

#include "tts/error.hpp"
#include "tts/util.hpp"
#include "tts/trace.hpp"
#include "tts/perturb.hpp"
#include "tts/backend.hpp"
#include "tts/synthetic.hpp"
#include "tts/tiny_transformer.hpp"
#include "tts/scoring.hpp"
#include "tts/steering.hpp"
#include "tts/plot.hpp"
#include "tts/runner.hpp"
