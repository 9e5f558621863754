#pragma once

#include "scbch/config.hpp"
#include "scbch/dataset.hpp"
#include "scbch/error.hpp"
#include "scbch/experiment.hpp"
#include "scbch/losses.hpp"
#include "scbch/model.hpp"
#include "scbch/ndmath/autodiff.hpp"
#include "scbch/ndmath/matrix.hpp"
#include "scbch/retrieval.hpp"
#include "scbch/trainer.hpp"
