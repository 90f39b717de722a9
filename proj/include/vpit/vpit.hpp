#ifndef VPIT_VPIT_HPP
#define VPIT_VPIT_HPP

#include "vpit/config.hpp"
#include "vpit/data.hpp"
#include "vpit/geometry.hpp"
#include "vpit/metrics.hpp"
#include "vpit/nn/adam.hpp"
#include "vpit/nn/checkpoint.hpp"
#include "vpit/nn/model.hpp"
#include "vpit/nn/ops.hpp"
#include "vpit/nn/tensor.hpp"
#include "vpit/pillars.hpp"
#include "vpit/stream.hpp"
#include "vpit/tracker.hpp"
#include "vpit/train.hpp"

#endif  // VPIT_VPIT_HPP
