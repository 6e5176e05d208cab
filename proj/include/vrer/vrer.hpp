#pragma once

#include "vrer/config.hpp"
#include "vrer/env.hpp"
#include "vrer/estimators.hpp"
#include "vrer/experiment.hpp"
#include "vrer/math.hpp"
#include "vrer/oracle.hpp"
#include "vrer/policy.hpp"
#include "vrer/replay.hpp"
#include "vrer/selection.hpp"
#include "vrer/trainer.hpp"
#include "vrer/variance.hpp"
