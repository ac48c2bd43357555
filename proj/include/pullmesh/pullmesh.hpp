#ifndef PULLMESH_PULLMESH_HPP
#define PULLMESH_PULLMESH_HPP

#include "pullmesh/autodiff.hpp"
#include "pullmesh/config.hpp"
#include "pullmesh/fftnet.hpp"
#include "pullmesh/graph.hpp"
#include "pullmesh/losses.hpp"
#include "pullmesh/meshing.hpp"
#include "pullmesh/metrics.hpp"
#include "pullmesh/msp.hpp"
#include "pullmesh/pointcloud.hpp"
#include "pullmesh/rng.hpp"
#include "pullmesh/tensor.hpp"
#include "pullmesh/trainer.hpp"

#endif
