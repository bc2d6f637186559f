#pragma once

#include "entroflow/error.hpp"
#include "entroflow/grid.hpp"
#include "entroflow/densities.hpp"
#include "entroflow/functionals.hpp"
#include "entroflow/transport.hpp"
#include "entroflow/diffusion.hpp"
#include "entroflow/product_flow.hpp"
#include "entroflow/bridge.hpp"
#include "entroflow/experiments.hpp"
