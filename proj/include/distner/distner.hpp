#pragma once

#include "distner/error.hpp"
#include "distner/text.hpp"
#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"
#include "distner/stopwords.hpp"
#include "distner/dictionary.hpp"
#include "distner/matcher.hpp"
#include "distner/distiller.hpp"
#include "distner/active_learner.hpp"
#include "distner/crf_tagger.hpp"
#include "distner/evaluator.hpp"
#include "distner/relation_extractor.hpp"
#include "distner/config.hpp"
#include "distner/service.hpp"
#include "distner/cli.hpp"
