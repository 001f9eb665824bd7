# Independent random-walk simulation; output is recorded in tests/data/random_walk_reference.txt
# and used by the mask statistics test. Prints: mean, sd, standard error, mean masked cells.
import numpy as np
H=W=224; steps=3136; n=1000
rng=np.random.default_rng(20211124)
fr=[]
moves=[(-1,0),(1,0),(0,-1),(0,1)]
for s in range(n):
    i=rng.integers(H); j=rng.integers(W)
    seen={(i,j)}
    for _ in range(steps):
        while True:
            di,dj=moves[rng.integers(4)]
            a,b=i+di,j+dj
            if 0<=a<H and 0<=b<W: break
        i,j=a,b; seen.add((i,j))
    fr.append(len(seen)/(H*W))
fr=np.array(fr)
print(fr.mean(), fr.std(ddof=1), fr.std(ddof=1)/np.sqrt(n), (fr*H*W).mean())
