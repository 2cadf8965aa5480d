#pragma once

// Umbrella header for the whole library.

#include "leanconv/autograd.hpp"
#include "leanconv/bench.hpp"
#include "leanconv/conv_ops.hpp"
#include "leanconv/data.hpp"
#include "leanconv/direct.hpp"
#include "leanconv/error.hpp"
#include "leanconv/fft.hpp"
#include "leanconv/gradcheck.hpp"
#include "leanconv/layers.hpp"
#include "leanconv/network.hpp"
#include "leanconv/operators.hpp"
#include "leanconv/optim.hpp"
#include "leanconv/parallel.hpp"
#include "leanconv/runtime.hpp"
#include "leanconv/serialize.hpp"
#include "leanconv/spectral.hpp"
#include "leanconv/steps.hpp"
#include "leanconv/tensor.hpp"
#include "leanconv/train.hpp"
#include "leanconv/verify.hpp"
