#pragma once

// Everything except the command line layer.

#include "stormnet/config.hpp"
#include "stormnet/correction.hpp"
#include "stormnet/geo_graph.hpp"
#include "stormnet/ingest.hpp"
#include "stormnet/layers.hpp"
#include "stormnet/model.hpp"
#include "stormnet/svg.hpp"
#include "stormnet/synth.hpp"
#include "stormnet/training.hpp"
