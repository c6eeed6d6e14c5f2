#pragma once

#include "fdm/adam.hpp"
#include "fdm/alias_table.hpp"
#include "fdm/cooccurrence.hpp"
#include "fdm/corpus.hpp"
#include "fdm/error.hpp"
#include "fdm/evaluation.hpp"
#include "fdm/fdm_model.hpp"
#include "fdm/matrix.hpp"
#include "fdm/pipeline.hpp"
#include "fdm/random.hpp"
#include "fdm/synthetic.hpp"
#include "fdm/trainer.hpp"
