#pragma once

#include "viq/config.hpp"
#include "viq/error.hpp"
#include "viq/experiment.hpp"
#include "viq/fourier.hpp"
#include "viq/imaging.hpp"
#include "viq/info.hpp"
#include "viq/nn.hpp"
#include "viq/observers.hpp"
#include "viq/optim.hpp"
#include "viq/random.hpp"
#include "viq/restoration.hpp"
#include "viq/selftest.hpp"
#include "viq/task_metrics.hpp"
#include "viq/tensor.hpp"
#include "viq/tensor_io.hpp"
