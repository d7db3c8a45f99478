#pragma once

#include "mc4ad/checkpoint.hpp"
#include "mc4ad/config.hpp"
#include "mc4ad/dagen.hpp"
#include "mc4ad/dataset.hpp"
#include "mc4ad/error.hpp"
#include "mc4ad/geometry.hpp"
#include "mc4ad/io.hpp"
#include "mc4ad/losses.hpp"
#include "mc4ad/metrics.hpp"
#include "mc4ad/network.hpp"
#include "mc4ad/parallel.hpp"
#include "mc4ad/scoring.hpp"
#include "mc4ad/sparse_conv.hpp"
#include "mc4ad/training.hpp"
