"""Genetic search over encoder/decoder CNN architectures for undersampled MR reconstruction.

Modules
-------
genome         12-gene encoding, crossover, mutation, text format
phenotype      genome to architecture graph compilation and shape inference
analyzer       FLOPs, parameter counts and summaries of a graph
tensor_engine  numpy forward/backward execution of a graph
trainer        optimizers, early-stopped training, fitness
kspace         FFT, undersampling masks, phantom datasets
metrics        MSE, NMSE, SSIM, PSNR
search         the genetic algorithm, lineage log and checkpoints
"""

__version__ = "0.1.0"
