#pragma once

#include "zootune/backbone.hpp"
#include "zootune/checkpoint.hpp"
#include "zootune/complexity.hpp"
#include "zootune/config_file.hpp"
#include "zootune/csv.hpp"
#include "zootune/dataset.hpp"
#include "zootune/errors.hpp"
#include "zootune/format.hpp"
#include "zootune/fs_util.hpp"
#include "zootune/gradcheck.hpp"
#include "zootune/graph.hpp"
#include "zootune/kernels.hpp"
#include "zootune/log.hpp"
#include "zootune/mac_counter.hpp"
#include "zootune/rng.hpp"
#include "zootune/tensor.hpp"
#include "zootune/training.hpp"
#include "zootune/zoo_layers.hpp"
