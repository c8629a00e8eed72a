#pragma once

#include "protoad/data.hpp"
#include "protoad/error.hpp"
#include "protoad/finch.hpp"
#include "protoad/grid.hpp"
#include "protoad/image_io.hpp"
#include "protoad/kernels.hpp"
#include "protoad/matrix.hpp"
#include "protoad/metrics.hpp"
#include "protoad/pipeline.hpp"
#include "protoad/prototype.hpp"
#include "protoad/scoring.hpp"
#include "protoad/tensor.hpp"
