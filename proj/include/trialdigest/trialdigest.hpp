#pragma once

#include "trialdigest/backend.hpp"
#include "trialdigest/batching.hpp"
#include "trialdigest/citations.hpp"
#include "trialdigest/date.hpp"
#include "trialdigest/error.hpp"
#include "trialdigest/hash.hpp"
#include "trialdigest/http_backend.hpp"
#include "trialdigest/ingest.hpp"
#include "trialdigest/metrics.hpp"
#include "trialdigest/pipeline.hpp"
#include "trialdigest/prompting.hpp"
#include "trialdigest/text.hpp"
#include "trialdigest/trial.hpp"
