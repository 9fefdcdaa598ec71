#pragma once

#include "uhop/datagen.hpp"
#include "uhop/engine.hpp"
#include "uhop/error.hpp"
#include "uhop/eval.hpp"
#include "uhop/kg_store.hpp"
#include "uhop/rng.hpp"
#include "uhop/scorer.hpp"
#include "uhop/trainer.hpp"
