#pragma once

#include "nnsens/data.hpp"
#include "nnsens/engine.hpp"
#include "nnsens/experiments.hpp"
#include "nnsens/explain.hpp"
#include "nnsens/models.hpp"
#include "nnsens/report_io.hpp"
#include "nnsens/sequence.hpp"
#include "nnsens/serialize.hpp"
#include "nnsens/tape.hpp"
#include "nnsens/tensor.hpp"
#include "nnsens/training.hpp"
#include "nnsens/validation.hpp"
