#pragma once

#include "topocnn/checkpoint.hpp"
#include "topocnn/dataset.hpp"
#include "topocnn/layers.hpp"
#include "topocnn/metrics.hpp"
#include "topocnn/network.hpp"
#include "topocnn/pgm.hpp"
#include "topocnn/random.hpp"
#include "topocnn/simp.hpp"
#include "topocnn/tensor.hpp"
