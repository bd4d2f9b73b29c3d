#pragma once

#include "ong/checkpoint.hpp"
#include "ong/config.hpp"
#include "ong/data.hpp"
#include "ong/error.hpp"
#include "ong/masking.hpp"
#include "ong/matrix.hpp"
#include "ong/network.hpp"
#include "ong/nmf.hpp"
#include "ong/pipeline.hpp"
#include "ong/random.hpp"
#include "ong/trainer.hpp"
