#pragma once

#include "dln/checkpoint.hpp"
#include "dln/classifier.hpp"
#include "dln/decoding.hpp"
#include "dln/errors.hpp"
#include "dln/extractor.hpp"
#include "dln/features.hpp"
#include "dln/gradcheck.hpp"
#include "dln/keyvalue.hpp"
#include "dln/lexicon.hpp"
#include "dln/lnlstm.hpp"
#include "dln/metrics.hpp"
#include "dln/model.hpp"
#include "dln/pipeline.hpp"
#include "dln/selfcheck.hpp"
#include "dln/synth.hpp"
#include "dln/training.hpp"
