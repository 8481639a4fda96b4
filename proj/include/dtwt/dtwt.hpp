#pragma once

// Everything except the HTTP server (which needs httplib on the include path).
#include "dtwt/error.hpp"
#include "dtwt/expr.hpp"
#include "dtwt/model_parser.hpp"
#include "dtwt/thing_description.hpp"
#include "dtwt/resolve.hpp"
#include "dtwt/program.hpp"
#include "dtwt/system.hpp"
#include "dtwt/schedule.hpp"
#include "dtwt/observations.hpp"
#include "dtwt/ode.hpp"
#include "dtwt/trajectory.hpp"
#include "dtwt/least_squares.hpp"
#include "dtwt/learning.hpp"
#include "dtwt/rng.hpp"
#include "dtwt/trace_io.hpp"
#include "dtwt/simulators.hpp"
#include "dtwt/twin.hpp"
#include "dtwt/project.hpp"
#include "dtwt/service.hpp"
