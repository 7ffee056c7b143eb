#pragma once

// Unit tests reuse the oracle helpers that back the verification suites.

#include "robattr/checks.hpp"

namespace oracles {
using namespace robattr::oracle;
using robattr::Rng;
using robattr::Shape;
using robattr::Tensor;
}  // namespace oracles
