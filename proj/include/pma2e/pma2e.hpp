#pragma once

// Umbrella header for the point-cloud masked affine autoencoder toolkit.

#include "autograd.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "corruption.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "geometry.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "models.hpp"
#include "nn.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "trainer.hpp"
