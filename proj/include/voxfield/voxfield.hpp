// Copyright Contributors to the voxfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "voxfield/common.hpp"
#include "voxfield/config.hpp"
#include "voxfield/contraction.hpp"
#include "voxfield/datasets.hpp"
#include "voxfield/distortion_loss.hpp"
#include "voxfield/grid.hpp"
#include "voxfield/image.hpp"
#include "voxfield/optimizer.hpp"
#include "voxfield/rendering.hpp"
#include "voxfield/trainer.hpp"
