#pragma once

#include "chebqr/cheb.hpp"
#include "chebqr/data.hpp"
#include "chebqr/error.hpp"
#include "chebqr/evaluation.hpp"
#include "chebqr/losses.hpp"
#include "chebqr/matrix.hpp"
#include "chebqr/models.hpp"
#include "chebqr/nnet.hpp"
#include "chebqr/random.hpp"
