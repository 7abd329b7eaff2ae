// wsseg - weakly supervised point cloud segmentation
//
// Umbrella header.

#ifndef WSSEG_WSSEG_HPP
#define WSSEG_WSSEG_HPP

#include "wsseg/colorspace.hpp"
#include "wsseg/config.hpp"
#include "wsseg/core/ply.hpp"
#include "wsseg/core/random.hpp"
#include "wsseg/core/scene.hpp"
#include "wsseg/core/spatial_index.hpp"
#include "wsseg/core/types.hpp"
#include "wsseg/metrics.hpp"
#include "wsseg/model.hpp"
#include "wsseg/pretext.hpp"
#include "wsseg/propagation.hpp"
#include "wsseg/training.hpp"
#include "wsseg/weaklabel.hpp"

#endif  // WSSEG_WSSEG_HPP
