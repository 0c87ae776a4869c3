#pragma once

#include "trailcam/clock.hpp"
#include "trailcam/config.hpp"
#include "trailcam/csv.hpp"
#include "trailcam/dataset.hpp"
#include "trailcam/drift.hpp"
#include "trailcam/error.hpp"
#include "trailcam/evaluation.hpp"
#include "trailcam/explain.hpp"
#include "trailcam/gateway.hpp"
#include "trailcam/image.hpp"
#include "trailcam/io.hpp"
#include "trailcam/parallel.hpp"
#include "trailcam/similarity.hpp"
#include "trailcam/stats.hpp"
#include "trailcam/subprocess.hpp"
