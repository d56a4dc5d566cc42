#pragma once

#include "pfa/core.hpp"
#include "pfa/factor.hpp"
#include "pfa/fdp.hpp"
#include "pfa/io.hpp"
#include "pfa/poet.hpp"
#include "pfa/rng.hpp"
#include "pfa/simulation.hpp"
#include "pfa/spectral.hpp"
#include "pfa/threshold.hpp"
#include "pfa/version.hpp"
