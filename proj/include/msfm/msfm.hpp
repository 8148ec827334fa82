#pragma once

// Umbrella header.

#include "msfm/errors.hpp"
#include "msfm/evaluation.hpp"
#include "msfm/geometry.hpp"
#include "msfm/gradcheck.hpp"
#include "msfm/inference.hpp"
#include "msfm/losses.hpp"
#include "msfm/model.hpp"
#include "msfm/rng.hpp"
#include "msfm/sampling.hpp"
#include "msfm/svg.hpp"
#include "msfm/synth.hpp"
#include "msfm/trainer.hpp"
