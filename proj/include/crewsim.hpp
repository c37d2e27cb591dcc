#pragma once

// Everything: engine, text, meetings, policies, training signals, trainer,
// logs/replay, evaluation, and the agent wire protocol.
#include "crewsim/config.hpp"
#include "crewsim/engine.hpp"
#include "crewsim/eval.hpp"
#include "crewsim/game.hpp"
#include "crewsim/gamelog.hpp"
#include "crewsim/meeting.hpp"
#include "crewsim/policies.hpp"
#include "crewsim/protocol.hpp"
#include "crewsim/server.hpp"
#include "crewsim/signals.hpp"
#include "crewsim/textgen.hpp"
#include "crewsim/trainer.hpp"
