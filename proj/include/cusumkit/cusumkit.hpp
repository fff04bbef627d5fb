#pragma once

#include "cusumkit/baseline.hpp"
#include "cusumkit/cusum.hpp"
#include "cusumkit/discretization.hpp"
#include "cusumkit/errors.hpp"
#include "cusumkit/instrumentation.hpp"
#include "cusumkit/mc_oracle.hpp"
#include "cusumkit/model.hpp"
#include "cusumkit/sprt.hpp"
