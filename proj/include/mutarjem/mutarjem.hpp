#pragma once

#include "mutarjem/bleu.hpp"
#include "mutarjem/corpus.hpp"
#include "mutarjem/decode.hpp"
#include "mutarjem/distribution.hpp"
#include "mutarjem/embed.hpp"
#include "mutarjem/error.hpp"
#include "mutarjem/hash.hpp"
#include "mutarjem/model.hpp"
#include "mutarjem/remote.hpp"
#include "mutarjem/rng.hpp"
#include "mutarjem/text.hpp"
