#pragma once

#include "clusters.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "embedder.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "generator.hpp"
#include "index.hpp"
#include "objectives.hpp"
#include "optimizer.hpp"
#include "preference.hpp"
#include "sampling.hpp"
#include "synthesis.hpp"
#include "text.hpp"
#include "trainer.hpp"
#include "util.hpp"
