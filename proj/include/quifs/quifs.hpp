#pragma once

#include "quifs/budget.hpp"
#include "quifs/common.hpp"
#include "quifs/expression.hpp"
#include "quifs/extend.hpp"
#include "quifs/interp.hpp"
#include "quifs/io.hpp"
#include "quifs/kernels.hpp"
#include "quifs/lattice.hpp"
#include "quifs/mpc.hpp"
#include "quifs/qp.hpp"
#include "quifs/quadrature.hpp"
#include "quifs/sim.hpp"
#include "quifs/synth.hpp"
