#pragma once

#include "knnres/core.hpp"
#include "knnres/errors.hpp"
#include "knnres/io.hpp"
#include "knnres/jacreg.hpp"
#include "knnres/losses.hpp"
#include "knnres/net.hpp"
#include "knnres/optim.hpp"
#include "knnres/synthgen.hpp"
#include "knnres/trainer.hpp"
