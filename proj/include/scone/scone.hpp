// Umbrella header.
#pragma once

#include "scone/bake.hpp"      // IWYU pragma: export
#include "scone/common.hpp"    // IWYU pragma: export
#include "scone/corpus.hpp"    // IWYU pragma: export
#include "scone/discovery.hpp" // IWYU pragma: export
#include "scone/eval.hpp"      // IWYU pragma: export
#include "scone/matcher.hpp"   // IWYU pragma: export
#include "scone/model.hpp"     // IWYU pragma: export
#include "scone/ngram_map.hpp" // IWYU pragma: export
#include "scone/store.hpp"     // IWYU pragma: export
#include "scone/synthetic.hpp" // IWYU pragma: export
#include "scone/train.hpp"     // IWYU pragma: export
