#pragma once

#include "chanout/approximator.hpp"
#include "chanout/config.hpp"
#include "chanout/csv.hpp"
#include "chanout/dataset.hpp"
#include "chanout/errors.hpp"
#include "chanout/gradcheck.hpp"
#include "chanout/layers.hpp"
#include "chanout/network.hpp"
#include "chanout/pathway.hpp"
#include "chanout/rng.hpp"
#include "chanout/selection.hpp"
#include "chanout/sparse.hpp"
#include "chanout/tensor.hpp"
#include "chanout/trainer.hpp"
