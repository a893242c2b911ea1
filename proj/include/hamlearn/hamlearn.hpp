#pragma once

#include "hamlearn/autoencoder.hpp"
#include "hamlearn/dataset.hpp"
#include "hamlearn/error.hpp"
#include "hamlearn/experiment.hpp"
#include "hamlearn/forest.hpp"
#include "hamlearn/nn.hpp"
#include "hamlearn/parallel.hpp"
#include "hamlearn/pauli_coords.hpp"
#include "hamlearn/quantum.hpp"
#include "hamlearn/simulator.hpp"
#include "hamlearn/training.hpp"
