#pragma once

#include <homproj/core.hpp>
#include <homproj/error.hpp>
#include <homproj/integrators.hpp>
#include <homproj/linalg.hpp>
#include <homproj/problems/double_pendulum.hpp>
#include <homproj/problems/kepler.hpp>
#include <homproj/problems/oscillator.hpp>
#include <homproj/problems/pde.hpp>
#include <homproj/projection.hpp>
#include <homproj/tableaus.hpp>
