#pragma once

#include "distflow/analysis.hpp"
#include "distflow/cauchy.hpp"
#include "distflow/discrete.hpp"
#include "distflow/model.hpp"
#include "distflow/ode.hpp"
#include "distflow/profile.hpp"
#include "distflow/shooting.hpp"
