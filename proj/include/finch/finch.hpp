#pragma once

#include "finch/errors.hpp"
#include "finch/format.hpp"
#include "finch/scheduler.hpp"
#include "finch/model.hpp"
#include "finch/data.hpp"
#include "finch/lab.hpp"
#include "finch/verifier.hpp"
#include "finch/gradcheck.hpp"
#include "finch/config.hpp"
#include "finch/summary.hpp"
#include "finch/artifacts.hpp"
#include "finch/bridge.hpp"
