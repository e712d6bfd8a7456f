#ifndef IRISLOC_IRISLOC_HPP
#define IRISLOC_IRISLOC_HPP

#include "irisloc/checkpoint.hpp"
#include "irisloc/data.hpp"
#include "irisloc/errors.hpp"
#include "irisloc/gradcheck.hpp"
#include "irisloc/graph.hpp"
#include "irisloc/grid.hpp"
#include "irisloc/localise.hpp"
#include "irisloc/losses.hpp"
#include "irisloc/metrics.hpp"
#include "irisloc/models.hpp"
#include "irisloc/ops.hpp"
#include "irisloc/optim.hpp"
#include "irisloc/rng.hpp"
#include "irisloc/tensor.hpp"
#include "irisloc/training.hpp"

#endif  // IRISLOC_IRISLOC_HPP
