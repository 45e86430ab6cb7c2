#pragma once

#include "robscatter/core.hpp"
#include "robscatter/diagnostics.hpp"
#include "robscatter/io.hpp"
#include "robscatter/numerics.hpp"
#include "robscatter/simulate.hpp"
#include "robscatter/solver.hpp"
#include "robscatter/weights.hpp"
