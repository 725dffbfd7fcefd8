#pragma once

#include "ppreg/asymptotics.hpp"
#include "ppreg/book.hpp"
#include "ppreg/estimate.hpp"
#include "ppreg/harness.hpp"
#include "ppreg/likelihood.hpp"
#include "ppreg/linalg.hpp"
#include "ppreg/lob.hpp"
#include "ppreg/model.hpp"
#include "ppreg/model_io.hpp"
#include "ppreg/path.hpp"
#include "ppreg/quadrature.hpp"
#include "ppreg/rng.hpp"
#include "ppreg/simulate.hpp"
#include "ppreg/stats.hpp"
