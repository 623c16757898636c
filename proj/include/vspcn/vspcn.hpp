#pragma once

#include "vspcn/attributes.hpp"
#include "vspcn/backbone.hpp"
#include "vspcn/binary_io.hpp"
#include "vspcn/checkpoint.hpp"
#include "vspcn/config.hpp"
#include "vspcn/dataset.hpp"
#include "vspcn/errors.hpp"
#include "vspcn/eval.hpp"
#include "vspcn/fusion.hpp"
#include "vspcn/gradcheck.hpp"
#include "vspcn/losses.hpp"
#include "vspcn/model.hpp"
#include "vspcn/optimizer.hpp"
#include "vspcn/params.hpp"
#include "vspcn/tape.hpp"
#include "vspcn/tensor.hpp"
#include "vspcn/trainer.hpp"
